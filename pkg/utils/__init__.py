# Library modules for LSH / RFF kernel approximation on point clouds
