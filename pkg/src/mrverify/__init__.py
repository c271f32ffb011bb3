"""Operation verification for mixed-reality guided assembly.

Mask IoU against a threshold decides whether a physical step matches its
virtual guidance; the package also covers frame alignment, motion-triggered
capture, synthetic pair datasets, evaluation metrics and an edge protocol.
"""

from .errors import MRVerifyError
from .imaging import CodecSpec, Frame, Mask, Region
from .kernels import BACKEND
from .verification import VerificationDecision, VerificationPolicy, iou, verify

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CodecSpec", "Frame", "Mask", "MRVerifyError", "Region",
    "VerificationDecision", "VerificationPolicy", "iou", "verify", "__version__",
]
