"""Face and license-plate desensitization: joint post-processing, redaction, and IoFF evaluation."""

__version__ = "0.1.0"
