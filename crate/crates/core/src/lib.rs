pub mod autoencoder;
pub mod backtest;
pub mod chart_render;
pub mod cli;
pub mod graph_cluster;
pub mod market_data;
pub mod portfolio;
