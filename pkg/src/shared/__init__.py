# Shared models, logging setup and artifact storage for the CLI and the MCP server
