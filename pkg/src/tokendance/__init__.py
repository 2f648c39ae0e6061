"""Two-stage music-to-dance generation with FSQ tokenizers and a bidirectional selective-scan generator."""

__version__ = "0.1.0"
