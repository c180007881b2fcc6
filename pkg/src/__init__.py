# Choreography toolkit package