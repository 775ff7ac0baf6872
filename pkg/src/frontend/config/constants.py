"""
Application Constants

Names and log format shared by the command line
"""

APP_NAME = "bclab"
APP_VERSION = "0.1.0"
APP_DESCRIPTION = "Boundary control lab: wave solves, control from boundary data and potential reconstruction"

# Logging
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
