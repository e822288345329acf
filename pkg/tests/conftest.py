import logging

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# Stage folding is reported at WARNING; keep test logs quiet.
logging.getLogger("memsim.core").setLevel(logging.ERROR)
