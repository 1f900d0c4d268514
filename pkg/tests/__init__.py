# Test files