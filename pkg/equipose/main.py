import os

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .config import EQUIPOSE_CHECKPOINT, apply_runtime_settings
from .geometry.group import get_group
from .services.inference_service import get_inference_service

# Import individual routes with error handling
metrics = None
inference = None

try:
    from .api import metrics
    print("SUCCESS: Metrics router imported")
except Exception as e:
    print(f"ERROR: Error importing metrics router: {e}")
    metrics = None

try:
    from .api import inference
    print("SUCCESS: Inference router imported")
except Exception as e:
    print(f"ERROR: Error importing inference router: {e}")
    inference = None

# Initialize FastAPI app
app = FastAPI(title="EquiPose", version=__version__)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
)

if metrics:
    try:
        app.include_router(metrics.router, prefix="/api/v1", tags=["metrics"])
        print("SUCCESS: Metrics router included")
    except Exception as e:
        print(f"ERROR: Error including metrics router: {e}")

if inference:
    try:
        app.include_router(inference.router, prefix="/api/v1", tags=["inference"])
        print("SUCCESS: Inference router included")
    except Exception as e:
        print(f"ERROR: Error including inference router: {e}")


@app.get("/")
async def root():
    return {"message": "EquiPose API", "status": "running"}


@app.get("/health")
async def health_check():
    checkpoint_ready = False
    group = get_group("icosahedral")
    try:
        service = get_inference_service()
        if service is not None:
            checkpoint_ready = True
            group = service.model.group
    except Exception as e:
        print(f"WARNING: [API] checkpoint not loadable: {e}")
    return {
        "status": "healthy",
        "version": __version__,
        "group": group.name,
        "group_size": group.size,
        "checkpoint": EQUIPOSE_CHECKPOINT,
        "checkpoint_available": checkpoint_ready,
        "routes_available": {
            "metrics": metrics is not None,
            "inference": inference is not None,
        },
    }


@app.on_event("startup")
async def startup():
    print("Starting up EquiPose API...")
    apply_runtime_settings()
    print("Application ready to serve requests")


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("equipose.main:app", host="0.0.0.0", port=int(os.getenv("PORT", "8000")))
