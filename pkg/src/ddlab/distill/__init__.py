from .ema import EMA
from .losses import (
    INSTANCE_METHODS,
    gan_d_loss,
    gan_g_loss,
    instance_loss,
    jump,
    r1_penalty,
    sample_indices,
)
from .train import (
    LOG_COLUMNS,
    DistillResult,
    DivergenceError,
    GANConfig,
    Generator,
    TeacherSpec,
    TrainLog,
    distill_combined,
    distill_gdd,
    kstep_sigmas,
    one_step_sigmas,
    train_kstep_teacher,
)

__all__ = [name for name in dir() if not name.startswith("_")]
