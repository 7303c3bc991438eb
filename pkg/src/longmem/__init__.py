"""Long-term memory for chat assistants: indexing, retrieval, reading and
evaluation over timestamped chat histories."""

from .memstore import BenchmarkInstance, ChatSession, Timestamp, Turn, load_dataset
from .index import IndexConfig, MemoryItem, build_index
from .retrieve import QueryPlan, search

__all__ = [
    "BenchmarkInstance", "ChatSession", "Timestamp", "Turn", "load_dataset",
    "IndexConfig", "MemoryItem", "build_index", "QueryPlan", "search",
]
