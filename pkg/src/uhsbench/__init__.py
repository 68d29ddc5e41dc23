"""Desk-scale underground hydrogen storage benchmark stack.

Pipeline: heterogeneous field generation -> two-phase three-component
reservoir simulation with a cyclic central well -> learning-ready dataset
assembly -> surrogate training (static and auto-regressive) -> rollout
evaluation and storage-performance metrics.
"""

__version__ = "0.1.0"

from .config import RunConfig, build_config, load_config  # noqa: F401
from .dataset import ChannelStats, FieldScaler, SampleSpec, SplitManifest  # noqa: F401
from .fluids import FluidProps, RelPermModel  # noqa: F401
from .geomodel import FieldParams, GeoModel, GridSpec  # noqa: F401
from .schedule import Schedule, Stage  # noqa: F401
from .simulator import SimConfig, SimState, SnapshotSeries, run_simulation  # noqa: F401
from .surrogate import UNetRegressor  # noqa: F401
from .uhsd import DatasetBundle, build_dataset, read_dataset, write_dataset  # noqa: F401
