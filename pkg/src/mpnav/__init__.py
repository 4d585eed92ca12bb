"""Multi-modal navigation instructions: landmark image alignment and evaluation."""
from .alignment import (
    AlignmentConfig,
    Candidate,
    CandidateSet,
    Selection,
    bbox_score,
    combined_score,
    derive_terminal,
    select_aligned_beam,
    select_aligned_exhaustive,
    select_related,
    sequence_score,
)
from .instruction import (
    MultiModalInstruction,
    PhraseSpan,
    Setting,
    TextInstruction,
    VisualPrompt,
    assemble_token_layout,
    interleave,
    restrict_setting,
    validate_instruction,
)
from .metrics import EpisodeResult, NavGraph, Trajectory, aggregate, goal_progress, ndtw, spl, success

__version__ = "0.1.0"
