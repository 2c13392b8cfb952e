"""
Development scripts for the spad_link_module project.
"""
