"""One fixed binding set per bundled template, used for the golden files."""

MEMORY = (
    "A text to image model\n"
    "[Proficient] Proficient at photorealistic landscapes.\n"
    "[Weak] Poor at rendering legible text inside images."
)
PROMPT = "Three birds sitting on a wire at sunset"

BINDINGS = {
    "feedback_generation": {"prompt": PROMPT, "score": 3},
    "memory_refinement": {
        "tool_name": "sdxl_turbo",
        "current_memory": "Good at color harmony.\nBad at counting objects.",
        "task_prompt": PROMPT,
        "response": "images/p0001/sdxl_turbo.png",
        "score_rubric": "1 (Does not match at all) to 5 (Matches exactly)",
        "score": 3,
        "feedback": "Only two birds are visible.",
    },
    "image_description_generic": {"model_name": "sdxl_turbo", "prompt": PROMPT},
    "image_description_fewshot": {
        "model_name": "sdxl_turbo",
        "prompt": PROMPT,
        "current_memory": "A text to image model",
        "few_shot_memory": 'Prompt: "A red cube on a blue sphere" Score: 2\nPrompt: "A cat in the snow" Score: 5',
    },
    "image_description_toolmem": {"model_name": "sdxl_turbo", "prompt": PROMPT, "current_memory": MEMORY},
    "image_score_generic": {"model_name": "sdxl_turbo", "prompt": PROMPT},
    "image_score_fewshot": {
        "model_name": "sdxl_turbo",
        "prompt": PROMPT,
        "samples_prompt": 'Prompt: "A red cube on a blue sphere" Score: 2\nPrompt: "A cat in the snow" Score: 5',
    },
    "image_score_toolmem": {"model_name": "sdxl_turbo", "prompt": PROMPT, "current_memory": MEMORY},
    "text_score_generic": {
        "model_name": "gpt35",
        "prompt": "Explain why the sky is blue in two sentences.",
        "rubric": "Score 1: incorrect. Score 5: correct and concise.",
    },
    "text_score_fewshot": {
        "model_name": "gpt35",
        "task_prompt": "Explain why the sky is blue in two sentences.",
        "rubric": "Score 1: incorrect. Score 5: correct and concise.",
        "few_shot_examples": "Task Prompt: Define entropy.\nRubric: Score 1: wrong. Score 5: precise.\nModel's Score: 4",
    },
    "text_score_toolmem": {
        "model_name": "gpt35",
        "prompt": "Explain why the sky is blue in two sentences.",
        "rubric": "Score 1: incorrect. Score 5: correct and concise.",
        "current_memory": "A large language model\n[Good] Good at short factual explanations.",
    },
}
