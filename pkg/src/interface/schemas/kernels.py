from typing import Literal

from pydantic import BaseModel, Field


class KernelValueRequest(BaseModel):
    x: list[float] = Field(..., min_length=1)
    x2: list[float] = Field(..., min_length=1)
    depth: int = Field(2, ge=2)
    normalize: bool = False
    kind: Literal["ntk", "nngp"] = "ntk"


class KernelValueResponse(BaseModel):
    value: float
    depth: int
    kind: str


class KernelMatrixRequest(BaseModel):
    points: list[list[float]] = Field(..., min_length=1)
    depth: int = Field(2, ge=2)
    normalize: bool = False


class KernelMatrixResponse(BaseModel):
    matrix: list[list[float]]
    size: int


class InfoGainRequest(BaseModel):
    points: list[list[float]] = Field(..., min_length=1)
    depth: int = Field(2, ge=2)
    lam: float = Field(1.0, gt=0)


class InfoGainResponse(BaseModel):
    t: int
    lam: float
    value: float
    min_eigenvalue: float
