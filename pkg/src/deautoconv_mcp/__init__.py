# MCP tool server package
