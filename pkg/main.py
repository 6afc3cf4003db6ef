from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from src.interface.api.routes import experiments, kernels, benchmarks
from src.core.config import APP_NAME, APP_VERSION

app = FastAPI(
    title=f"{APP_NAME} API",
    description="Neural-network Thompson sampling for black-box optimization",
    version=APP_VERSION
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(experiments.router, prefix="/api/v1/experiments", tags=["Experiments"])
app.include_router(kernels.router, prefix="/api/v1/kernels", tags=["Kernels"])
app.include_router(benchmarks.router, prefix="/api/v1/benchmarks", tags=["Benchmarks"])

@app.get("/")
async def root():
    return {"message": f"Welcome to {APP_NAME} API", "version": APP_VERSION}

@app.get("/health")
async def health_check():
    return {"status": "healthy"}
