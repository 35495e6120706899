# Test package for elemdiff
