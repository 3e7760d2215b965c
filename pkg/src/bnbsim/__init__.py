"""Multi-agent Backdoors & Breaches simulator with retrieval augmentation."""
from __future__ import annotations

__version__ = "0.1.0"
