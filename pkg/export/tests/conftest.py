import os

# Fail hub lookups immediately instead of retrying DNS; the suite only
# exercises the offline fallback paths.
os.environ.setdefault("HF_HUB_OFFLINE", "1")
