//! Semantic types for GTFS Static fields.

use crate::table::SemanticType;

/// Files a usable feed must contain.
pub const REQUIRED_FILES: [&str; 4] = ["stops", "routes", "trips", "stop_times"];

/// Semantic type of `field` in `file`. Unknown fields are text.
pub fn field_type(file: &str, field: &str) -> SemanticType {
    use SemanticType::*;
    match (file, field) {
        (_, "arrival_time" | "departure_time" | "start_time" | "end_time") => TimeSeconds,
        (_, "start_date" | "end_date" | "date" | "feed_start_date" | "feed_end_date") => Date,
        (_, "route_color" | "route_text_color") => Color,
        (_, "stop_lat" | "stop_lon" | "shape_pt_lat" | "shape_pt_lon") => Coordinate,
        (_, "shape_dist_traveled" | "price" | "amount" | "length" | "traversal_time_float") => Float,
        (
            _,
            "agency_id" | "stop_id" | "route_id" | "trip_id" | "service_id" | "shape_id" | "block_id" | "zone_id"
            | "parent_station" | "level_id" | "fare_id" | "origin_id" | "destination_id" | "contains_id"
            | "from_stop_id" | "to_stop_id" | "from_route_id" | "to_route_id" | "from_trip_id" | "to_trip_id"
            | "pathway_id" | "network_id" | "area_id" | "fare_product_id" | "fare_media_id" | "leg_group_id"
            | "from_area_id" | "to_area_id" | "fare_transfer_rule_id" | "from_leg_group_id" | "to_leg_group_id"
            | "rider_category_id" | "timeframe_group_id" | "location_group_id",
        ) => Identifier,
        (
            _,
            "route_type" | "direction_id" | "stop_sequence" | "shape_pt_sequence" | "pickup_type" | "drop_off_type"
            | "timepoint" | "location_type" | "wheelchair_boarding" | "wheelchair_accessible" | "bikes_allowed"
            | "monday" | "tuesday" | "wednesday" | "thursday" | "friday" | "saturday" | "sunday" | "exception_type"
            | "headway_secs" | "exact_times" | "transfer_type" | "min_transfer_time" | "payment_method" | "transfers"
            | "transfer_duration" | "continuous_pickup" | "continuous_drop_off" | "route_sort_order"
            | "pathway_mode" | "is_bidirectional" | "traversal_time" | "stair_count" | "duration_limit"
            | "duration_limit_type" | "fare_transfer_type" | "transfer_count" | "fare_media_type"
            | "cars_allowed",
        ) => Integer,
        _ => Text,
    }
}

/// One-line description of how a semantic type is represented in the feed.
pub fn type_description(kind: SemanticType) -> &'static str {
    match kind {
        SemanticType::Text => "string",
        SemanticType::Integer => "integer",
        SemanticType::Float => "float",
        SemanticType::TimeSeconds => "time (seconds since midnight)",
        SemanticType::Date => "date (datetime.date)",
        SemanticType::Color => "color (hex string without '#')",
        SemanticType::Coordinate => "coordinate (float, WGS84 degrees)",
        SemanticType::Identifier => "identifier (string)",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_fields() {
        assert_eq!(field_type("stop_times", "arrival_time"), SemanticType::TimeSeconds);
        assert_eq!(field_type("calendar_dates", "date"), SemanticType::Date);
        assert_eq!(field_type("stops", "stop_lat"), SemanticType::Coordinate);
        assert_eq!(field_type("routes", "route_color"), SemanticType::Color);
        assert_eq!(field_type("trips", "route_id"), SemanticType::Identifier);
        assert_eq!(field_type("calendar", "monday"), SemanticType::Integer);
        assert_eq!(field_type("stops", "stop_name"), SemanticType::Text);
        assert_eq!(field_type("route_direction", "direction_name"), SemanticType::Text);
    }
}
