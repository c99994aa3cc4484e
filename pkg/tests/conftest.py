from hypothesis import settings

# statistical properties use fixed seeds; keep example generation reproducible too
settings.register_profile("repro", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repro")
