"""Hard-label oracle served over HTTP.

Answers GET /info with the model geometry and POST /classify with a bare
class label. Deliberately shares no code with any attack client: the tensor
format and the classification rule are reimplemented here, so a passing
interop test exercises the wire contract and nothing else.
"""

from oracle_server.models import PrototypeModel, read_tensor
from oracle_server.app import create_app

__all__ = ["PrototypeModel", "read_tensor", "create_app"]
