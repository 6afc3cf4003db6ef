from pydantic import BaseModel, Field

from src.domain.models import DomainKind


class BenchmarkInfo(BaseModel):
    id: str
    name: str
    dim: int
    domain: DomainKind
    lower: list[float]
    upper: list[float]
    optimum_value: float | None = None


class BenchmarkList(BaseModel):
    benchmarks: list[BenchmarkInfo]
    total: int


class EvaluateRequest(BaseModel):
    x: list[float] = Field(..., min_length=1)


class EvaluateResponse(BaseModel):
    objective: str
    value: float
