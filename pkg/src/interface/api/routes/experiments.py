from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session

from src.application.uses_cases.harness.experiment_service import run_experiment
from src.core.errors import NeuralBOError
from src.domain.models import Experiment
from src.infrastructure.database import get_db
from src.infrastructure.trace_store import TraceStore
from src.interface.api.dependencies import get_store, to_http_error
from src.interface.schemas.experiments import (
    ExperimentConfig,
    ExperimentDetail,
    ExperimentReport,
    ExperimentResponse,
)

router = APIRouter()


@router.post("", response_model=ExperimentReport, status_code=status.HTTP_201_CREATED)
def create_experiment(
    cfg: ExperimentConfig,
    store: TraceStore = Depends(get_store),
    db: Session = Depends(get_db)
):
    """Run an experiment synchronously and return its summary"""
    if cfg.output_dir is not None:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail="output_dir cannot be set over HTTP; the server's results root is used"
        )
    try:
        return run_experiment(cfg, output_dir=store.root, db=db)
    except NeuralBOError as e:
        raise to_http_error(e)


@router.get("", response_model=list[ExperimentResponse])
async def list_experiments(db: Session = Depends(get_db)):
    """List experiments recorded in the registry"""
    return db.query(Experiment).order_by(Experiment.created_at.desc()).all()


@router.get("/{name}", response_model=ExperimentDetail)
async def get_experiment(name: str, db: Session = Depends(get_db)):
    """Get one experiment with its runs"""
    experiment = db.query(Experiment).filter(Experiment.name == name).first()
    if not experiment:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Experiment not found"
        )
    return experiment


@router.get("/{name}/summary", response_model=ExperimentReport)
async def get_summary(name: str, store: TraceStore = Depends(get_store)):
    """Get the persisted summary of an experiment"""
    summary = store.load_summary(name)
    if summary is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Summary not found"
        )
    return summary
