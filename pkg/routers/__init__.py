# Router package
