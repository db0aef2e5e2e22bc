"""
graphon-epi - Nash equilibria of finite-state graphon games with epidemic scenarios
"""
