from fastapi import APIRouter

from src.application.uses_cases.benchmarks.benchmark_service import evaluate_true, get_objective, list_objectives
from src.core.errors import NeuralBOError
from src.interface.api.dependencies import to_http_error
from src.interface.schemas.benchmarks import BenchmarkList, EvaluateRequest, EvaluateResponse

router = APIRouter()


def describe_objective(objective_id: str) -> dict:
    objective = get_objective(objective_id)
    return {
        "id": objective.key,
        "name": objective.name,
        "dim": objective.dim,
        "domain": objective.domain.kind,
        "lower": objective.domain.lower.tolist(),
        "upper": objective.domain.upper.tolist(),
        "optimum_value": objective.optimum_value,
    }


@router.get("", response_model=BenchmarkList)
async def list_benchmarks():
    """List the preset benchmark objectives"""
    benchmarks = [describe_objective(objective_id) for objective_id in list_objectives()]
    return {"benchmarks": benchmarks, "total": len(benchmarks)}


@router.post("/{objective_id}/evaluate", response_model=EvaluateResponse)
async def evaluate_benchmark(objective_id: str, request: EvaluateRequest):
    """Noise-free value of a benchmark at one point"""
    try:
        objective = get_objective(objective_id)
        value = evaluate_true(objective, request.x)
    except NeuralBOError as e:
        raise to_http_error(e)
    return {"objective": objective.key, "value": value}
