"""Style-aware subject drag-and-drop at desk scale.

Subpackages: diffusion (trainable backbone), personalization (subject
learning), style_injection (adapter-based style transfer), insertion
(segment-paste-effects), bootstrap (self-training domain adaptation),
synthdata (procedural ground truth), evaluation (metric suite),
orchestrator (pipeline, jobs, HTTP service, CLI).
"""

from . import (bootstrap, diffusion, embedders, evaluation, insertion,
               personalization, pretrain, style_injection, synthdata)
from .errors import StyleDragError

__version__ = "0.1.0"

__all__ = [
    "bootstrap", "diffusion", "embedders", "evaluation", "insertion",
    "personalization", "pretrain", "style_injection", "synthdata",
    "StyleDragError", "__version__",
]
