"""Multi-hop question answering over a knowledge graph built lazily from
retrieved passages, one sub-question at a time."""

from .bfs_rf import EvidenceContext, PartialAnswer, build_context, describe_path, parse_chain, select_seeds
from .community import Community, detect_communities
from .corpus import Chunk, Document, chunk_corpus, chunk_document, load_corpus
from .errors import (
    ConfigurationError,
    CorpusLoadError,
    CorpusParseError,
    ExtractionError,
    IndexFormatError,
    IndexingError,
    NotFoundError,
    ProviderError,
    HopGraphError,
    TemplateError,
    TransientProviderError,
    ValidationError,
)
from .eval import EvalReport, QAExample, exact_match, load_dataset, normalize_answer, run_benchmark, token_f1
from .extraction import EntityMention, LLMExtractor, RelationTriple, RuleExtractor
from .graph import EvidencePath, KnowledgeGraph, UpsertReport
from .index import (
    HashingEmbedder,
    Index,
    RetrievalHit,
    build_index,
    frontier_conditioned_search,
    hybrid_search,
    lexical_search,
    load_index,
    save_index,
    vector_search,
)
from .llm import Completion, LLMClient, MockProvider, MockScript, PromptRequest, render_template
from .pipeline import AnswerRecord, PipelineConfig, QAEngine, answer, make_llm
from .trace import Trace

__version__ = "0.1.0"
