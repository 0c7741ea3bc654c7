from hypothesis import settings

# numba kernels compile on first use; per-example deadlines would be noise
settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")
