"""Multi-glint detection and identity-preserving constellation matching.

Staged per-frame pipeline: enhancement, controlled over-detection with
adaptive fallback, spatial gating, and template-based correspondence via
similarity-layout alignment, plus baselines, metrics, and a synthetic
scene oracle.
"""

__version__ = "0.1.0"
