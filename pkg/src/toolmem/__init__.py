"""Capability memory for generative tools.

Build a per-tool memory of what a tool is good and bad at from scored past
interactions, then use it to predict scores on new tasks and to choose
between tools.
"""

from .builder import (
    DEFAULT_K_BUILD,
    BuildFailed,
    BuildResult,
    Experience,
    build_memory,
    generate_feedback,
    induce_and_update,
    parse_memory_text,
)
from .errors import *  # noqa: F401,F403
from .gateway import (
    DEFAULT_MODEL,
    DEFAULT_SAMPLE_COUNT,
    DEFAULT_TEMPERATURE,
    CompletionRequest,
    Gateway,
    MockBackend,
    RecordingBackend,
    RemoteBackend,
    load_template,
    render_template,
)
from .memory import (
    CATEGORIES,
    MemoryEntry,
    ProficiencyCategory,
    ToolMemory,
    create_tool_memory,
    export_memory,
    load_memory,
    replace_entries,
    save_memory,
)
from .metrics import SelectionMetrics, mae, pearson, rmse, selection_metrics
from .predictor import (
    DEFAULT_K_INFER,
    DEFAULT_SHOT_COUNT,
    Mode,
    PredictionMode,
    ToolContext,
    parse_score,
    predict_description,
    predict_score,
    select_tool,
)
from .retrieval import HashEmbedder, MemoryIndex, RemoteEmbedder, cosine_distance

__version__ = "0.1.0"
