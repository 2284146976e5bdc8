"""minit5: a desk-scale text-to-text transformer toolkit on numpy.

Pipeline pieces: BPE tokenizer with reserved sentinels (`bpe`), paragraph
dedup (`dedup`), span-corruption / i.i.d. denoising objectives (`noising`),
an encoder-decoder transformer with its own reverse-mode autodiff
(`tensor`, `model`, `gradcheck`), AdamW training with checkpoints
(`training`), Slovene task formatting (`tasks`), and greedy decoding plus
metrics (`evaluation`). `cli` wires them into commands.
"""

from .model import ModelConfig, count_parameters, forward, init_params, preset, training_budget_ratio
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "Tape",
    "Tensor",
    "backward",
    "count_parameters",
    "forward",
    "init_params",
    "preset",
    "training_budget_ratio",
    "__version__",
]
