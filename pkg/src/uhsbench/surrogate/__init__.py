from .estimator import UNetRegressor  # noqa: F401
from .net import NetSpec, forward, init_params, load_params, loss_and_grads, save_params  # noqa: F401
from .train import Adam, Sgd, TrainConfig, TrainHistory, evaluate_mae, lr_at, train  # noqa: F401
