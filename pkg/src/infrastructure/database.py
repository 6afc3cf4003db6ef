from pathlib import Path
from typing import Iterator

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker, Session
from src.core.config import settings, resolve_output_dir
from src.domain.models import Base

_engines: dict[str, Engine] = {}


def get_engine(url: str | None = None) -> Engine:
    """One engine per registry URL; tables are created on first use."""
    url = url or settings.registry_url()
    if url not in _engines:
        if url.startswith("sqlite:///"):
            Path(url.removeprefix("sqlite:///")).parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(
            url,
            connect_args={"check_same_thread": False} if "sqlite" in url else {}
        )
        Base.metadata.create_all(bind=engine)
        _engines[url] = engine
    return _engines[url]


def session_factory(url: str | None = None) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))


def get_db() -> Iterator[Session]:
    db = session_factory(settings.registry_url(resolve_output_dir()))()
    try:
        yield db
    finally:
        db.close()
