from functools import lru_cache
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):

    model_config = SettingsConfigDict(env_prefix="SZC_")

    # Caps the dask thread pool. None lets dask pick (one per core).
    threads: Optional[int] = None

    @field_validator("threads")
    @classmethod
    def _positive(cls, value):
        if value is not None and value < 1:
            raise ValueError("SZC_THREADS must be a positive integer.")
        return value


@lru_cache()
def get_settings():
    return Settings()


def compute(*delayed_objects):
    """
    Evaluate dask.delayed objects on the thread scheduler, honoring SZC_THREADS.

    Results come back in argument order, so output never depends on the
    number of workers.
    """
    import dask

    return dask.compute(
        *delayed_objects,
        scheduler="threads",
        num_workers=get_settings().threads,
    )
