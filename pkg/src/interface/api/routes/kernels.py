from fastapi import APIRouter

from src.application.uses_cases.ntk.ntk_service import info_gain, nngp_value, ntk_matrix, ntk_value
from src.core.errors import NeuralBOError
from src.interface.api.dependencies import to_http_error
from src.interface.schemas.kernels import (
    InfoGainRequest,
    InfoGainResponse,
    KernelMatrixRequest,
    KernelMatrixResponse,
    KernelValueRequest,
    KernelValueResponse,
)

router = APIRouter()


@router.post("/value", response_model=KernelValueResponse)
async def kernel_value(request: KernelValueRequest):
    """Analytic NTK (or its NNGP component) for one pair of inputs"""
    try:
        if request.kind == "nngp":
            value = nngp_value(request.x, request.x2, request.depth)
        else:
            value = ntk_value(request.x, request.x2, request.depth, normalize=request.normalize)
    except NeuralBOError as e:
        raise to_http_error(e)
    return {"value": value, "depth": request.depth, "kind": request.kind}


@router.post("/matrix", response_model=KernelMatrixResponse)
async def kernel_matrix(request: KernelMatrixRequest):
    """Analytic NTK gram matrix of a point set"""
    try:
        result = ntk_matrix(request.points, request.depth, normalize=request.normalize)
    except NeuralBOError as e:
        raise to_http_error(e)
    return {"matrix": result.matrix.tolist(), "size": result.size}


@router.post("/info-gain", response_model=InfoGainResponse)
async def kernel_info_gain(request: InfoGainRequest):
    """0.5 log det(I + H / lambda) for a point set"""
    try:
        report = info_gain(request.points, request.lam, request.depth)
    except NeuralBOError as e:
        raise to_http_error(e)
    return report._asdict()
