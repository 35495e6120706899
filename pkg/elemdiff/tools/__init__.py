# Exact integer linear algebra and inequality elimination used to solve index maps
