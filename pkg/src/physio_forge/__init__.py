"""Joint face spoofing and forgery detection from appearance and physiological cues."""

__version__ = "0.1.0"
