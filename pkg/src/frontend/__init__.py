"""Frontend module - command line entry point"""
