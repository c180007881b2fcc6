# Test package for the choreography toolkit