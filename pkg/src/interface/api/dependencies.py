from fastapi import HTTPException, status

from src.core.config import resolve_output_dir
from src.core.errors import ConfigurationError, InputError, NeuralBOError, NumericalError
from src.infrastructure.trace_store import TraceStore


def get_store() -> TraceStore:
    """Trace store rooted at the resolved output directory"""
    return TraceStore(resolve_output_dir())


def to_http_error(exc: NeuralBOError) -> HTTPException:
    """Map toolkit errors onto HTTP status codes"""
    if isinstance(exc, (ConfigurationError, InputError)):
        return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
    if isinstance(exc, NumericalError) and exc.eigenvalues is not None:
        return HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"message": str(exc), "eigenvalues": [float(v) for v in exc.eigenvalues]},
        )
    return HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
