"""narlab: desk-scale non-autoregressive translation with AR distillation."""

__version__ = "0.1.0"
