"""Ghost signals for verifying termination of busy-waiting programs.

Plain and annotated interpreters for a small concurrent language, a
proof-outline checker, and program-order-graph analysis of annotated traces.
"""

from .annotated import AnnotatedTrace, StuckReport, run_annotated
from .bags import Bag, dm_less
from .corpus_loader import corpus_load, corpus_names
from .lang.parser import parse_assertion, parse_program
from .plain import make_schedule, run_fair
from .pog import build_pog, verify_rank_descent
from .proof_checker import check_outline, check_viewshift, entail

__version__ = "0.1.0"

__all__ = [
    "AnnotatedTrace", "Bag", "StuckReport", "build_pog", "check_outline", "check_viewshift",
    "corpus_load", "corpus_names", "dm_less", "entail", "make_schedule", "parse_assertion",
    "parse_program", "run_annotated", "run_fair", "verify_rank_descent",
]
