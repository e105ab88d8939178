from .census import FreezeError, ParamCensus, apply_freeze_mask, param_census, parse_freeze
from .disc import DiscriminatorSpec, build_discriminator, discriminator_logits
from .layers import CATEGORIES, Module, Parameter
from .score import ScoreNetSpec, build_score_net, raw_forward

__all__ = [
    "CATEGORIES",
    "DiscriminatorSpec",
    "FreezeError",
    "Module",
    "ParamCensus",
    "Parameter",
    "ScoreNetSpec",
    "apply_freeze_mask",
    "build_discriminator",
    "build_score_net",
    "discriminator_logits",
    "param_census",
    "parse_freeze",
    "raw_forward",
]
