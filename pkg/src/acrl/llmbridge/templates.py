"""Prompt templates for the captioner and reasoner endpoints.

Slots are written ``{name}``.  Substitution is a single regex pass, so
literal braces such as ``\\boxed{answer}`` and braces inside slot values are
left untouched.
"""

from __future__ import annotations

import re

INITIAL = """\
I need your help analyzing this image to prepare for answering the following question:

{question}

IMPORTANT: DO NOT answer the question directly. Instead, provide a comprehensive and detailed description of everything visible in the image that could be relevant for answering this question.

Focus on describing:
- All objects, people, text, and visual elements in the image
- Spatial relationships between different elements
- Any text content that is visible, transcribed exactly
- Colors, shapes, patterns, and visual attributes
- Relevant contextual details and background information

Your description should be detailed enough that someone could mentally reconstruct the image without seeing it, but DO NOT provide step-by-step instructions on how to recreate it."""

FOCUSED = """\
Original Question: {question}

Previous Description: {previous_descriptions}

CONTEXT: The description above was provided for this image, but some details might be missing or unclear. We are asking this specific follow-up question to gather additional visual details.

Your specific task: {focus_request}

CRITICAL INSTRUCTIONS:
- You are a VISUAL DESCRIBER only - DO NOT attempt to answer the original question
- DO NOT solve the problem or provide calculations
- DO NOT give step-by-step solutions or reasoning
- ONLY describe what you can see in the image that relates to the specific request
- Focus solely on visual elements: objects, text, numbers, shapes, spatial relationships
- If asked about measurements, describe what you see but don't calculate or solve
- If asked about equations, transcribe what's visible but don't solve them
- Be thorough and precise in your description since this is to clarify specific missing details"""

ADAPTIVE_DECISION = """\
You are an expert visual reasoning assistant. Your task is to analyze the given image description and decide if you can solve the problem directly or if you need one specific piece of additional visual information.

Image Description: {description}

Question: {question}

ANALYSIS INSTRUCTIONS:
1. **CAREFUL EVALUATION**: Analyze if the description contains all specific visual details needed to solve completely and accurately.
2. **BE CONSERVATIVE**: If missing ANY crucial visual detail, request MORE information rather than guess.
3. **ONE CLARIFICATION ONLY**: You can request specific additional visual information if needed.
4. **DECISION CRITERIA**:
   - If you have ALL visual details needed: Status = SOLVED
   - If missing crucial visual information: Status = NEED_MORE_INFO
5. **AVOID ASSUMPTIONS**: Don't guess numbers, assume "typical" values, or fill in missing details.

CRITICAL PRINCIPLES:
- **BE SPECIFIC in requests**: Ask for exact details you need
- **SOLVE CONFIDENTLY when possible**: If you have enough information, provide the complete solution
- **REQUEST STRATEGICALLY**: Make your one request count - ask for the most crucial missing details

OUTPUT FORMAT (all fields required):
Reasoning: [Your detailed analysis of what information you have and what might be missing]
Status: [SOLVED or NEED_MORE_INFO]
Answer: [Your complete final answer if Status is SOLVED - use \\boxed{answer} format, otherwise N/A]
Request: [Your specific request for additional visual information if Status is NEED_MORE_INFO, otherwise N/A]"""

FINAL = """\
You are an expert mathematical reasoning assistant. Based on the complete image description below, please solve the mathematical problem step-by-step.

Complete Image Description: {description}

Question: {question}

INSTRUCTIONS:
1. Analyze the complete image description carefully
2. Work through the problem step-by-step with clear mathematical reasoning
3. Show all calculations and logical steps
4. Provide your final answer in the required format
5. Use \\boxed{answer} notation. For multiple choice, use \\boxed{letter} format

You MUST follow this format:
<think>
Your detailed reasoning and thought process here...
</think>
<answer> Final Answer: your final answer here </answer>"""

TEMPLATES = {
    "initial": INITIAL,
    "focused": FOCUSED,
    "adaptive_decision": ADAPTIVE_DECISION,
    "final": FINAL,
}

SLOTS = {
    "initial": ("question",),
    "focused": ("question", "previous_descriptions", "focus_request"),
    "adaptive_decision": ("description", "question"),
    "final": ("description", "question"),
}

_SLOT_RE = re.compile(r"\{(question|description|previous_descriptions|focus_request)\}")


class TemplateError(KeyError):
    pass


def render_prompt(template_id: str, **slots: str) -> str:
    if template_id not in TEMPLATES:
        raise TemplateError(f"unknown template {template_id!r}")
    for name in SLOTS[template_id]:
        if name not in slots or slots[name] is None:
            raise TemplateError(f"template {template_id!r} requires slot {name!r}")
    return _SLOT_RE.sub(lambda m: str(slots[m.group(1)]), TEMPLATES[template_id])
