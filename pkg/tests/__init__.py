# Tests package for spad_link_module
