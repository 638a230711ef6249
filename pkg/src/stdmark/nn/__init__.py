from .data import Dataset, synth_dataset
from .network import (
    LayerSpec,
    Network,
    avgpool_global,
    backward,
    conv2d,
    cross_entropy,
    dense,
    forward,
    predict,
    relu,
    softmax_head,
)
from .train import (
    EmbedSpec,
    History,
    NesterovSGD,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    total_loss,
    train,
    training_gradient,
)
from .checkpoint import CheckpointError, load, loads, save, dumps
