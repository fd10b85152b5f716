// Copyright 2026 The ReflectCap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string_view>

// Prompt templates. Placeholders use {name} and are filled by render_template.
namespace reflectcap::prompts {

// ---- Offline agents ----

inline constexpr std::string_view kCaptionerSystem =
    "You are an expert image captioner. Describe images accurately and in detail.";
inline constexpr std::string_view kCaptionerUser = "Describe this image in detail.";

inline constexpr std::string_view kFeedbackSystem =
    "You are a caption quality monitor. Compare the generated caption with the reference caption.\n"
    "\n"
    "Your task:\n"
    "1. Identify HALLUCINATIONS: details in the generated caption that are WRONG or NOT visible in the image.\n"
    "2. Identify MISSING DETAILS: important details in the reference caption that are MISSING from the generated "
    "caption.\n"
    "For each issue, provide: (1) what the issue is, (2) why it's problematic, (3) a simple rule to avoid/fix it.\n"
    "\n"
    "Output format:\n"
    "Hallucinations: - issue 1, - issue 2, ...\n"
    "Missing Details: - issue 1, - issue 2, ...\n"
    "If no issues are found in a category, write \"None\".";
inline constexpr std::string_view kFeedbackUser =
    "Generated Caption: {generated_caption}\n"
    "Reference Caption: {reference_caption}\n"
    "\n"
    "Analyze the generated caption against the reference and the image.";

inline constexpr std::string_view kOrganizerSystem =
    "You manage \"Error Notes\" for an image captioning model.\n"
    "\n"
    "Your task:\n"
    "1. Review new issues from this batch.\n"
    "2. Update the error notes by adding new issues, merging similar ones, summarizing into general rules, and "
    "keeping maximum {k} items per category.\n"
    "3. Each item should be simple and compact (one line).\n"
    "\n"
    "Output format:\n"
    "[Hallucination - Avoid These]: - item 1, - item 2, ... (max {k})\n"
    "[Missing Detail - Include These]: - item 1, - item 2, ... (max {k})";
inline constexpr std::string_view kOrganizerUser =
    "Current Error Notes: {current_notes}\n"
    "New Issues from Batch: {batch_issues}\n"
    "\n"
    "Update the Error Notes. Keep it compact (max {k} items per category).";

inline constexpr std::string_view kRepairInstruction =
    "Reformat your previous answer exactly in the required output format.";

// ---- Online stages ----

inline constexpr std::string_view kBaseSystemPrefix =
    "You are an expert image captioner. When describing the image, avoid these common errors: ";
inline constexpr std::string_view kBaseSystemSuffix = ". Output only the caption.";
inline constexpr std::string_view kBaseSystem =
    "You are an expert image captioner. When describing the image, avoid these common errors: "
    "{hallucination_notes}. Output only the caption.";
inline constexpr std::string_view kBaseUser = "Describe this image in detail.";

inline constexpr std::string_view kDetailSystem =
    "You are an expert image captioner. Describe the image focusing on the aspects listed below, which are commonly "
    "overlooked. Only describe what is CLEARLY VISIBLE — do not guess or infer. Output only the caption.";
inline constexpr std::string_view kDetailUserPrefix =
    "Describe this image, paying special attention to these commonly missed aspects:\n\n";
inline constexpr std::string_view kDetailUser =
    "Describe this image, paying special attention to these commonly missed aspects:\n"
    "\n"
    "{missing_detail_notes}";

inline constexpr std::string_view kMergeSystem =
    "You supplement a base caption with new information from a second caption.\n"
    "\n"
    "Rules:\n"
    "- The base caption is the foundation — preserve its wording, counts, colors, and positions as-is.\n"
    "- From the second caption, only add objects or elements NOT already mentioned in the base.\n"
    "- Do NOT change any existing descriptions (counts, colors, spatial terms, materials).\n"
    "- Verify each new element against the image before adding it.\n"
    "- If the second caption has no genuinely new elements, return the base caption unchanged.";
inline constexpr std::string_view kMergeBaseLabel = "Base caption: ";
inline constexpr std::string_view kMergeSecondLabel = "\nSecond caption: ";
inline constexpr std::string_view kMergeUserTail =
    "\n\nAdd only new, verified elements from the second caption into the base. Do not modify existing details. "
    "Output only the final caption:";
inline constexpr std::string_view kMergeUser =
    "Base caption: {base_caption}\n"
    "Second caption: {detail_caption}\n"
    "\n"
    "Add only new, verified elements from the second caption into the base. Do not modify existing details. "
    "Output only the final caption:";

// ---- Comparison methods ----

inline constexpr std::string_view kCombinedSystemPrefix =
    "You are an expert image captioner. When describing the image, avoid these common errors: ";
inline constexpr std::string_view kCombinedSystemMiddle =
    ". Also make sure to describe these commonly missed aspects: ";
inline constexpr std::string_view kCombinedSystem =
    "You are an expert image captioner. When describing the image, avoid these common errors: "
    "{hallucination_notes}. Also make sure to describe these commonly missed aspects: {missing_detail_notes}. "
    "Output only the caption.";

inline constexpr std::string_view kFewShotPreamble = "Here are example detailed captions written by human annotators:";
inline constexpr std::string_view kFewShotExample = "Example {index}:\n{caption}";

inline constexpr std::string_view kSelfCorrectRevision =
    "Re-examine the image and revise your caption, fixing errors and keeping correct content. "
    "Output only the revised caption.";

inline constexpr std::string_view kDecomposeSystem =
    "You decompose image captions into atomic propositions. Each proposition states exactly one checkable fact. "
    "Output one proposition per line, each starting with \"- \". Output nothing else.";
inline constexpr std::string_view kDecomposeUser = "Caption:\n{caption}";

inline constexpr std::string_view kVerifySystem =
    "You verify statements about an image. Answer \"Supported\" if the statement is clearly true for the image, "
    "otherwise answer \"Unsupported\". Answer with one word.";
inline constexpr std::string_view kVerifyUser = "Statement: {proposition}";

inline constexpr std::string_view kRewriteSystem =
    "You rewrite an image caption so that it contains only the verified statements given to you. Keep the wording "
    "fluent and do not add anything new. Output only the caption.";
inline constexpr std::string_view kRewriteUser = "Original caption:\n{caption}\n\nVerified statements:\n{propositions}";

// Caption used when nothing could be described; parses as an empty fact set in simworld.
inline constexpr std::string_view kEmptyCaption = "No visible details.";

}  // namespace reflectcap::prompts
