# Configuration package for sketchcomm
