from .api import ControllerServer
from .client import (ControllerClient, ControllerRequestError, ControllerUnavailable,
                     LocalControllerClient)
from .config import ControllerConfig
from .core import (Conflict, ContentMetadata, Controller, ControllerError, InvalidRequest,
                   NotFound, StorageCapability, StorageSession)

__all__ = [
    "Conflict", "ContentMetadata", "Controller", "ControllerClient", "ControllerConfig",
    "ControllerError", "ControllerRequestError", "ControllerServer", "ControllerUnavailable",
    "InvalidRequest", "LocalControllerClient", "NotFound", "StorageCapability", "StorageSession",
]
