from .base import *
DEBUG = False
# Quieter console in batch jobs; override with CROWDCHARGE_LOG_LEVEL.
LOGGING["loggers"]["apps"]["level"] = os.getenv("CROWDCHARGE_LOG_LEVEL", "WARNING").upper()
