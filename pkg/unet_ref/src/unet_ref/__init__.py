from .data import Bundle, load_bundle  # noqa: F401
from .model import UNet  # noqa: F401
from .predict import ref_predict  # noqa: F401
from .training import RefTrainSpec, ref_train  # noqa: F401
