# Sparse Splitting Lab
