from .client import (
    Backend,
    BackendError,
    BackendReply,
    Completion,
    LLMClient,
    PromptBudgetError,
    PromptRequest,
    ResponseCache,
    Telemetry,
    TransientBackendError,
    UnparseableReply,
    Usage,
)
from .http import HttpBackend
from .mock import MockBackend, mock_complete
from .parsers import (
    CONSENSUS,
    NO_CONSENSUS,
    parse_consensus,
    parse_keywords,
    parse_ranked_list,
    parse_rating,
)
from .templates import TEMPLATES, Template, get_template

__all__ = [
    "Backend", "BackendError", "BackendReply", "Completion", "LLMClient", "PromptBudgetError",
    "PromptRequest", "ResponseCache", "Telemetry", "TransientBackendError", "UnparseableReply",
    "Usage", "HttpBackend", "MockBackend", "mock_complete", "CONSENSUS", "NO_CONSENSUS",
    "parse_consensus", "parse_keywords", "parse_ranked_list", "parse_rating", "TEMPLATES",
    "Template", "get_template",
]
