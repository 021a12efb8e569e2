"""Push-based datacenter monitoring: publishers, CEP engines, a subscription
manager, and a notification gateway, plus a measurement harness."""

__version__ = "0.1.0"

from .errors import DcmonError
from .model import EndpointId, MetricBatch, MetricSample

__all__ = [
    "DcmonError",
    "EndpointId",
    "MetricBatch",
    "MetricSample",
    "__version__",
]
