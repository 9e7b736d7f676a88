"""semsam-bench: semantic-neighborhood decoding and a 3D spatial-reasoning benchmark for medical volumes."""

__version__ = "0.1.0"

from .models import (
    SliceDirection, OrientationMode, Medium, VisualPromptKind, TextRefMode,
    TargetType, QuestionType, Ablation, CategoryTag, PromptRecord, QAItem, ResponseRecord
)
from .errors import (
    SemsamError, FormatError, ValidationError, ConfigurationError, ProtocolError,
    ContractError, ArtifactIOError, ErrorContext, ErrorCategory, ErrorSeverity,
    ErrorReporter, get_error_reporter, report_error
)
from .logging import (
    LogLevel, LogCategory, LogEntry, PerformanceMetric, LoggingConfig,
    SemsamLogger, ComponentLogger, performance_monitor, get_logger,
    initialize_logging, get_performance_summary
)
from .config import (
    NeighborBuildConfig, WindowSpec, RenderStyle, GenConfig, EvalConfig,
    ServeConfig, ConfigurationManager
)
from .embeddings import EmbeddingMatrix, TokenizerMeta, load_embeddings, save_embeddings, load_tokenizer_meta
from .vocab import VocabPartition, build_partition
from .neighbors import NeighborTable, build_neighbor_table, load_table, save_table
from .decoding import FilterSpec, KeepSpec, DecodeRequest, Candidate, StepOutcome, decode_step
from .server import DecodeServer, parse_request
from .volume import Volume, LabelMap, parse_nifti, load_labelmap, reorient_to_ras, resample_mpr, extract_frames
from .relations import (
    RelationTerm, StructureAnnotation, FrameMapping, annotate_structures,
    anatomical_relation, colloquial_relation
)
from .rendering import OverlaySpec, MediaManifest, render_frame, render_media
from .generator import QuestionGenerator, QuestionTemplates, CoverageReport, generate, serialize, load_items
from .validation import ValidationResult, AnswerKeyChecker
from .evaluation import (
    SynonymTable, GroupStats, EvalReport, extract_answer, normalize, score,
    credible_interval, aggregate, stub_respond
)
from .main import SemsamApp
from .cli import SemsamCLI

__all__ = [
    # Models
    'SliceDirection', 'OrientationMode', 'Medium', 'VisualPromptKind', 'TextRefMode',
    'TargetType', 'QuestionType', 'Ablation', 'CategoryTag', 'PromptRecord', 'QAItem', 'ResponseRecord',
    # Error Handling
    'SemsamError', 'FormatError', 'ValidationError', 'ConfigurationError', 'ProtocolError',
    'ContractError', 'ArtifactIOError', 'ErrorContext', 'ErrorCategory', 'ErrorSeverity',
    'ErrorReporter', 'get_error_reporter', 'report_error',
    # Logging and Monitoring
    'LogLevel', 'LogCategory', 'LogEntry', 'PerformanceMetric', 'LoggingConfig',
    'SemsamLogger', 'ComponentLogger', 'performance_monitor', 'get_logger',
    'initialize_logging', 'get_performance_summary',
    # Configuration
    'NeighborBuildConfig', 'WindowSpec', 'RenderStyle', 'GenConfig', 'EvalConfig',
    'ServeConfig', 'ConfigurationManager',
    # Decoding
    'EmbeddingMatrix', 'TokenizerMeta', 'load_embeddings', 'save_embeddings', 'load_tokenizer_meta',
    'VocabPartition', 'build_partition',
    'NeighborTable', 'build_neighbor_table', 'load_table', 'save_table',
    'FilterSpec', 'KeepSpec', 'DecodeRequest', 'Candidate', 'StepOutcome', 'decode_step',
    'DecodeServer', 'parse_request',
    # Benchmark
    'Volume', 'LabelMap', 'parse_nifti', 'load_labelmap', 'reorient_to_ras', 'resample_mpr', 'extract_frames',
    'RelationTerm', 'StructureAnnotation', 'FrameMapping', 'annotate_structures',
    'anatomical_relation', 'colloquial_relation',
    'OverlaySpec', 'MediaManifest', 'render_frame', 'render_media',
    'QuestionGenerator', 'QuestionTemplates', 'CoverageReport', 'generate', 'serialize', 'load_items',
    'ValidationResult', 'AnswerKeyChecker',
    'SynonymTable', 'GroupStats', 'EvalReport', 'extract_answer', 'normalize', 'score',
    'credible_interval', 'aggregate', 'stub_respond',
    # Application
    'SemsamApp', 'SemsamCLI',
]
