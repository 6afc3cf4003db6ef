"""
Script para criar/atualizar as tabelas do registro de experimentos
"""
from pathlib import Path

from sqlalchemy import inspect

from src.core.config import resolve_output_dir, settings
from src.infrastructure.database import get_engine


def create_tables(output_dir: Path | None = None) -> list[str]:
    """Creates the registry tables under the resolved output directory"""
    engine = get_engine(settings.registry_url(resolve_output_dir(output_dir)))
    tables = sorted(inspect(engine).get_table_names())
    print(f"Registry ready at {engine.url}")
    for table in tables:
        print(f"  - {table}")
    return tables


if __name__ == "__main__":
    create_tables()
