from .graphs import GraphModel, generate_modular, generate_scale_free

__all__ = ["GraphModel", "generate_modular", "generate_scale_free"]
